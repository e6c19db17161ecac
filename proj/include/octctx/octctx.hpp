#pragma once

#include "octctx/analysis.hpp"
#include "octctx/bitstream.hpp"
#include "octctx/checkpoint.hpp"
#include "octctx/context.hpp"
#include "octctx/error.hpp"
#include "octctx/geometry.hpp"
#include "octctx/metrics.hpp"
#include "octctx/model.hpp"
#include "octctx/nn.hpp"
#include "octctx/octree.hpp"
#include "octctx/params.hpp"
#include "octctx/pipeline.hpp"
#include "octctx/ply.hpp"
#include "octctx/range_coder.hpp"
#include "octctx/tensor.hpp"
#include "octctx/trainer.hpp"
