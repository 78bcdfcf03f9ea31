#pragma once

#include "pconv/config.hpp"
#include "pconv/core/adam.hpp"
#include "pconv/core/error.hpp"
#include "pconv/core/init.hpp"
#include "pconv/core/ops.hpp"
#include "pconv/core/pcnv.hpp"
#include "pconv/core/random.hpp"
#include "pconv/core/tensor.hpp"
#include "pconv/dataset.hpp"
#include "pconv/evaluate.hpp"
#include "pconv/features.hpp"
#include "pconv/gradcheck.hpp"
#include "pconv/image_io.hpp"
#include "pconv/losses.hpp"
#include "pconv/masks.hpp"
#include "pconv/metrics.hpp"
#include "pconv/network.hpp"
#include "pconv/partial_conv.hpp"
#include "pconv/superres.hpp"
#include "pconv/trainer.hpp"
