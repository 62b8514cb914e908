#pragma once

#include "flowback/align.hpp"
#include "flowback/block.hpp"
#include "flowback/classify.hpp"
#include "flowback/graph.hpp"
#include "flowback/harness/archive.hpp"
#include "flowback/harness/bench.hpp"
#include "flowback/harness/checkpoint.hpp"
#include "flowback/harness/config.hpp"
#include "flowback/harness/data.hpp"
#include "flowback/harness/eval.hpp"
#include "flowback/harness/frechet.hpp"
#include "flowback/harness/metrics.hpp"
#include "flowback/harness/train.hpp"
#include "flowback/model.hpp"
#include "flowback/optim.hpp"
#include "flowback/params.hpp"
#include "flowback/rng.hpp"
