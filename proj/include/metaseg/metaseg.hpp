#pragma once

#include "metaseg/analysis.hpp"
#include "metaseg/error.hpp"
#include "metaseg/features.hpp"
#include "metaseg/metaclf.hpp"
#include "metaseg/raster.hpp"
#include "metaseg/scoring.hpp"
#include "metaseg/segments.hpp"
#include "metaseg/svg.hpp"
#include "metaseg/synth.hpp"
