#pragma once

#include "oucr/checkpoint.hpp"
#include "oucr/common.hpp"
#include "oucr/cs.hpp"
#include "oucr/data.hpp"
#include "oucr/fft.hpp"
#include "oucr/kspace.hpp"
#include "oucr/metrics.hpp"
#include "oucr/model.hpp"
#include "oucr/optim.hpp"
#include "oucr/png.hpp"
#include "oucr/tensor.hpp"
#include "oucr/training.hpp"
#include "oucr/version.hpp"
