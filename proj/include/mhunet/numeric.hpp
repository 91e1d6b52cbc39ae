#pragma once

#include "mhunet/errors.hpp"
#include "mhunet/numeric/autograd.hpp"
#include "mhunet/numeric/fft.hpp"
#include "mhunet/numeric/finite_diff.hpp"
#include "mhunet/numeric/linalg.hpp"
#include "mhunet/numeric/ops.hpp"
#include "mhunet/numeric/random.hpp"
#include "mhunet/numeric/tensor.hpp"
