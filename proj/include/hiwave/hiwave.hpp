#pragma once

#include "hiwave/checkpoint.hpp"
#include "hiwave/config.hpp"
#include "hiwave/data.hpp"
#include "hiwave/errors.hpp"
#include "hiwave/model.hpp"
#include "hiwave/ops.hpp"
#include "hiwave/records.hpp"
#include "hiwave/rng.hpp"
#include "hiwave/tensor.hpp"
#include "hiwave/tokenizer.hpp"
#include "hiwave/trainer.hpp"
#include "hiwave/wavelet.hpp"
