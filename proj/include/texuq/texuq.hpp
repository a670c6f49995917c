#pragma once

#include "texuq/core.hpp"
#include "texuq/orientations.hpp"
#include "texuq/cpcore.hpp"
#include "texuq/polycrystal.hpp"
#include "texuq/rvefem.hpp"
#include "texuq/pce.hpp"
#include "texuq/calibrate.hpp"
#include "texuq/io.hpp"
#include "texuq/pipeline.hpp"
