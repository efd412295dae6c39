#pragma once

#include "coinlab/bell.hpp"
#include "coinlab/calibrate.hpp"
#include "coinlab/config.hpp"
#include "coinlab/core.hpp"
#include "coinlab/error.hpp"
#include "coinlab/io.hpp"
#include "coinlab/matcher.hpp"
#include "coinlab/plot.hpp"
#include "coinlab/synth.hpp"
