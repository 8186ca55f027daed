#pragma once

#include "mbrec/ndcore/adam.hpp"
#include "mbrec/ndcore/array.hpp"
#include "mbrec/ndcore/checkpoint.hpp"
#include "mbrec/ndcore/ops.hpp"
#include "mbrec/ndcore/parallel.hpp"
#include "mbrec/ndcore/random.hpp"
#include "mbrec/ndcore/sparse.hpp"
#include "mbrec/ndcore/tape.hpp"

#include "mbrec/config.hpp"
#include "mbrec/encoder.hpp"
#include "mbrec/evaluator.hpp"
#include "mbrec/fusion.hpp"
#include "mbrec/graph.hpp"
#include "mbrec/model.hpp"
#include "mbrec/sampler.hpp"
#include "mbrec/trainer.hpp"
