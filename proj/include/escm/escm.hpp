#pragma once

#include "escm/baselines.hpp"
#include "escm/common.hpp"
#include "escm/data_model.hpp"
#include "escm/eval.hpp"
#include "escm/lstm.hpp"
#include "escm/spectral.hpp"
