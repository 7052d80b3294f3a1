#pragma once

// Umbrella header.

#include "tablab/augment.hpp"
#include "tablab/data.hpp"
#include "tablab/harness.hpp"
#include "tablab/metrics.hpp"
#include "tablab/model.hpp"
#include "tablab/nn.hpp"
#include "tablab/rng.hpp"
#include "tablab/tensor.hpp"
#include "tablab/train.hpp"
#include "tablab/types.hpp"
