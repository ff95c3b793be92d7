#pragma once

#include "lrcw/augment.hpp"
#include "lrcw/backbone.hpp"
#include "lrcw/bev_raster.hpp"
#include "lrcw/checkpoint.hpp"
#include "lrcw/config.hpp"
#include "lrcw/error.hpp"
#include "lrcw/fusion_head.hpp"
#include "lrcw/metrics.hpp"
#include "lrcw/model.hpp"
#include "lrcw/nn/gradcheck.hpp"
#include "lrcw/nn/layers.hpp"
#include "lrcw/nn/loss.hpp"
#include "lrcw/nn/optim.hpp"
#include "lrcw/pipeline.hpp"
#include "lrcw/rng.hpp"
#include "lrcw/sensor_io.hpp"
#include "lrcw/synth.hpp"
#include "lrcw/tensor.hpp"
#include "lrcw/train.hpp"
