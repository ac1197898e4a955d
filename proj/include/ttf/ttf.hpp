#pragma once

#include "ttf/common.hpp"
#include "ttf/csv.hpp"
#include "ttf/roadnet.hpp"
#include "ttf/ingest.hpp"
#include "ttf/prep.hpp"
#include "ttf/tensor.hpp"
#include "ttf/factorize.hpp"
#include "ttf/autodiff.hpp"
#include "ttf/optim.hpp"
#include "ttf/model.hpp"
#include "ttf/checkpoint.hpp"
#include "ttf/train.hpp"
#include "ttf/synthgen.hpp"
#include "ttf/toy.hpp"
