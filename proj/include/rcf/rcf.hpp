#pragma once

#include "rcf/cells.hpp"
#include "rcf/checkpoint.hpp"
#include "rcf/dataset.hpp"
#include "rcf/errors.hpp"
#include "rcf/forecast.hpp"
#include "rcf/matrix.hpp"
#include "rcf/model.hpp"
#include "rcf/random.hpp"
#include "rcf/runner.hpp"
#include "rcf/scaler.hpp"
#include "rcf/training.hpp"
