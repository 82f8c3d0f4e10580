#pragma once

#include "spdcov/archive.hpp"
#include "spdcov/classic.hpp"
#include "spdcov/classifier.hpp"
#include "spdcov/config.hpp"
#include "spdcov/covariance.hpp"
#include "spdcov/dataset.hpp"
#include "spdcov/error.hpp"
#include "spdcov/features.hpp"
#include "spdcov/image_io.hpp"
#include "spdcov/metrics.hpp"
#include "spdcov/spd_geometry.hpp"
#include "spdcov/spdnet.hpp"
#include "spdcov/synthetic.hpp"
#include "spdcov/tensor_io.hpp"
