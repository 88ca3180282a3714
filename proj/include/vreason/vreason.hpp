#pragma once

// Umbrella header.

#include "vreason/analytics.hpp"
#include "vreason/backprop.hpp"
#include "vreason/common.hpp"
#include "vreason/config.hpp"
#include "vreason/controller.hpp"
#include "vreason/decode.hpp"
#include "vreason/entropy.hpp"
#include "vreason/kv_cache.hpp"
#include "vreason/manifest.hpp"
#include "vreason/model.hpp"
#include "vreason/pruner.hpp"
#include "vreason/rng.hpp"
#include "vreason/sampler.hpp"
#include "vreason/trace.hpp"
#include "vreason/tracker.hpp"
#include "vreason/verify.hpp"
#include "vreason/version.hpp"
#include "vreason/weights.hpp"
