#pragma once

#include "epipre/bench.hpp"
#include "epipre/clustering.hpp"
#include "epipre/dtree.hpp"
#include "epipre/errors.hpp"
#include "epipre/estimator.hpp"
#include "epipre/features.hpp"
#include "epipre/geometry.hpp"
#include "epipre/global_rank.hpp"
#include "epipre/pipeline.hpp"
#include "epipre/scene.hpp"
#include "epipre/standard_match.hpp"
#include "epipre/twokeypoint.hpp"
#include "epipre/types.hpp"
