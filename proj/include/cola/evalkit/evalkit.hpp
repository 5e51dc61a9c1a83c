#pragma once

#include "cola/evalkit/cross_style.hpp"
#include "cola/evalkit/timing.hpp"
#include "cola/evalkit/visualize.hpp"
#include "cola/evalkit/zero_shot.hpp"
