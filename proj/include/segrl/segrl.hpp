#pragma once

// Everything at once.

#include "rng.hpp"
#include "raster.hpp"
#include "distance_transform.hpp"
#include "metrics.hpp"
#include "prompt.hpp"
#include "scene.hpp"
#include "segmenter.hpp"
#include "policy.hpp"
#include "grpo.hpp"
#include "sft.hpp"
#include "curriculum.hpp"
#include "experiments.hpp"
