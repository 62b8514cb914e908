#pragma once

// Flat named-array persistence: a directory holding manifest.txt (text
// metadata + array index) and arrays.bin (little-endian float64). Used for
// checkpoints, sample archives, and feature-injection files.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flowback/graph.hpp"

namespace flowback {

struct NamedArray {
  Shape shape;
  std::vector<double> data;
};

class ArrayArchive {
 public:
  std::map<std::string, NamedArray> arrays;
  std::map<std::string, std::string> meta;  // free-form key/value lines

  void put(const std::string& name, Shape shape, std::vector<double> data) {
    if (data.size() != numel(shape))
      throw GraphError("archive: data/shape mismatch for " + name);
    arrays[name] = NamedArray{std::move(shape), std::move(data)};
  }
  void put_flat(const std::string& name, std::vector<double> data) {
    Shape s{data.size()};
    arrays[name] = NamedArray{std::move(s), std::move(data)};
  }
  bool has(const std::string& name) const { return arrays.count(name); }
  const NamedArray& at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw GraphError("archive: no array " + name);
    return it->second;
  }
  std::string meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw GraphError("archive: no meta key " + key);
    return it->second;
  }

  void save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream man(fs::path(dir) / "manifest.txt");
    std::ofstream bin(fs::path(dir) / "arrays.bin", std::ios::binary);
    if (!man || !bin) throw GraphError("archive: cannot write to " + dir);
    man << "flowback-archive v1\n";
    for (const auto& [k, v] : meta) man << "meta " << k << " = " << v << "\n";
    std::size_t offset = 0;  // in doubles
    for (const auto& [name, arr] : arrays) {
      man << "array " << name << " " << offset << " " << arr.shape.size();
      for (auto d : arr.shape) man << " " << d;
      man << "\n";
      bin.write(reinterpret_cast<const char*>(arr.data.data()),
                std::streamsize(arr.data.size() * sizeof(double)));
      offset += arr.data.size();
    }
    if (!man.good() || !bin.good())
      throw GraphError("archive: write failed in " + dir);
  }

  static ArrayArchive load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream man(fs::path(dir) / "manifest.txt");
    std::ifstream bin(fs::path(dir) / "arrays.bin", std::ios::binary);
    if (!man || !bin)
      throw GraphError("archive: cannot open archive at " + dir);
    ArrayArchive a;
    std::string line;
    std::getline(man, line);
    if (line != "flowback-archive v1")
      throw GraphError("archive: unrecognized format line '" + line + "'");
    struct Entry {
      std::string name;
      std::size_t offset;
      Shape shape;
    };
    std::vector<Entry> entries;
    while (std::getline(man, line)) {
      if (line.empty()) continue;
      std::istringstream is(line);
      std::string kind;
      is >> kind;
      if (kind == "meta") {
        std::string key, eq;
        is >> key >> eq;
        std::string val;
        std::getline(is, val);
        if (!val.empty() && val[0] == ' ') val.erase(0, 1);
        a.meta[key] = val;
      } else if (kind == "array") {
        Entry e;
        std::size_t rank = 0;
        is >> e.name >> e.offset >> rank;
        for (std::size_t i = 0; i < rank; ++i) {
          std::size_t d;
          is >> d;
          e.shape.push_back(d);
        }
        if (!is) throw GraphError("archive: malformed array line '" + line + "'");
        entries.push_back(std::move(e));
      } else {
        throw GraphError("archive: malformed manifest line '" + line + "'");
      }
    }
    for (const auto& e : entries) {
      NamedArray arr;
      arr.shape = e.shape;
      arr.data.resize(numel(e.shape));
      bin.seekg(std::streamoff(e.offset * sizeof(double)));
      bin.read(reinterpret_cast<char*>(arr.data.data()),
               std::streamsize(arr.data.size() * sizeof(double)));
      if (!bin) throw GraphError("archive: truncated arrays.bin for " + e.name);
      a.arrays[e.name] = std::move(arr);
    }
    return a;
  }
};

}  // namespace flowback
