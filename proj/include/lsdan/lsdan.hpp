#pragma once

#include "lsdan/bit_matrix.hpp"
#include "lsdan/data.hpp"
#include "lsdan/errors.hpp"
#include "lsdan/graph.hpp"
#include "lsdan/model.hpp"
#include "lsdan/purisk.hpp"
#include "lsdan/report.hpp"
#include "lsdan/tensor.hpp"
#include "lsdan/train.hpp"
