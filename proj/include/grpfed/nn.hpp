#pragma once

#include "grpfed/nn/losses.hpp"
#include "grpfed/nn/mlp.hpp"
#include "grpfed/nn/objectives.hpp"
#include "grpfed/nn/optimizer.hpp"
