#pragma once

#include "deepin/datagen.hpp"
#include "deepin/errors.hpp"
#include "deepin/finite_diff.hpp"
#include "deepin/harness.hpp"
#include "deepin/inference.hpp"
#include "deepin/linalg.hpp"
#include "deepin/matrix.hpp"
#include "deepin/metrics.hpp"
#include "deepin/model.hpp"
#include "deepin/network.hpp"
#include "deepin/rng.hpp"
#include "deepin/special.hpp"
#include "deepin/trainer.hpp"
