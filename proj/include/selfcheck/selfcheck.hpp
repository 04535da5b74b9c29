// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "selfcheck/caption_parser.hpp"
#include "selfcheck/config.hpp"
#include "selfcheck/domain.hpp"
#include "selfcheck/engine.hpp"
#include "selfcheck/errors.hpp"
#include "selfcheck/eval.hpp"
#include "selfcheck/gateway.hpp"
#include "selfcheck/prompts.hpp"
#include "selfcheck/report.hpp"
#include "selfcheck/runner.hpp"
