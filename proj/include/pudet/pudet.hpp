#pragma once

// Umbrella header: positive-unlabeled risk estimation for objectness
// classification, with a synthetic detection world to train and evaluate on.

#include "pudet/config.hpp"
#include "pudet/dataset_io.hpp"
#include "pudet/errors.hpp"
#include "pudet/experiment.hpp"
#include "pudet/geometry.hpp"
#include "pudet/metrics.hpp"
#include "pudet/model.hpp"
#include "pudet/prior.hpp"
#include "pudet/risk.hpp"
#include "pudet/rng.hpp"
#include "pudet/scene.hpp"
#include "pudet/trainer.hpp"
