#pragma once

#include "needlesim/beam.hpp"
#include "needlesim/config.hpp"
#include "needlesim/controllers.hpp"
#include "needlesim/errors.hpp"
#include "needlesim/experiments.hpp"
#include "needlesim/insertion.hpp"
#include "needlesim/study.hpp"
#include "needlesim/text.hpp"
#include "needlesim/tissue.hpp"
