#pragma once

#include "krnet/checkpoint.hpp"
#include "krnet/config.hpp"
#include "krnet/flow.hpp"
#include "krnet/gradients.hpp"
#include "krnet/io.hpp"
#include "krnet/layers.hpp"
#include "krnet/nn.hpp"
#include "krnet/numkit.hpp"
#include "krnet/targets.hpp"
#include "krnet/train.hpp"
