#pragma once

#include "mhunet/model/checkpoint.hpp"
#include "mhunet/model/config.hpp"
#include "mhunet/model/layers.hpp"
#include "mhunet/model/loss.hpp"
#include "mhunet/model/network.hpp"
#include "mhunet/model/parameters.hpp"
#include "mhunet/model/training.hpp"
#include "mhunet/model/trainer.hpp"
