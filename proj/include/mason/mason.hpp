#pragma once

#include "mason/analysis.hpp"
#include "mason/changegen.hpp"
#include "mason/common.hpp"
#include "mason/config.hpp"
#include "mason/data.hpp"
#include "mason/decoder.hpp"
#include "mason/encoder.hpp"
#include "mason/eval.hpp"
#include "mason/image.hpp"
#include "mason/loss.hpp"
#include "mason/optim.hpp"
#include "mason/perlin.hpp"
#include "mason/plot.hpp"
#include "mason/png_io.hpp"
#include "mason/quantile.hpp"
#include "mason/rng.hpp"
#include "mason/serialize.hpp"
#include "mason/tensor.hpp"
#include "mason/train.hpp"
