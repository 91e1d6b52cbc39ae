#pragma once

#include "mhunet/data/dataset.hpp"
#include "mhunet/data/file_io.hpp"
#include "mhunet/data/nifti.hpp"
#include "mhunet/data/png_mask.hpp"
#include "mhunet/data/preprocess.hpp"
