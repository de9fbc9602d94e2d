#pragma once

// Local label propagation over a learned unit-sphere embedding: memory bank,
// density-corrected weighted-KNN pseudo-labeling, confidence-weighted losses
// with exact gradients, and the experiment loop tying them together.

#include "llp/ablation.hpp"
#include "llp/bank.hpp"
#include "llp/common.hpp"
#include "llp/config.hpp"
#include "llp/data.hpp"
#include "llp/eval.hpp"
#include "llp/io.hpp"
#include "llp/losses.hpp"
#include "llp/model.hpp"
#include "llp/neighborhood.hpp"
#include "llp/parallel.hpp"
#include "llp/propagation.hpp"
#include "llp/rng.hpp"
#include "llp/softmax.hpp"
#include "llp/trainer.hpp"
