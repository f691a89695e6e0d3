#pragma once

#include "adapter.hpp"
#include "calibrate.hpp"
#include "demo.hpp"
#include "error.hpp"
#include "gps.hpp"
#include "image.hpp"
#include "imageops.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "png_io.hpp"
#include "policy.hpp"
#include "prediction.hpp"
#include "rng.hpp"
#include "synthetic.hpp"
#include "transform.hpp"
