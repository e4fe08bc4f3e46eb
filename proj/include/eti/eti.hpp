#pragma once

#include <eti/errors.hpp>
#include <eti/budget.hpp>
#include <eti/estimator.hpp>
#include <eti/aggregate.hpp>
#include <eti/synthetic.hpp>
#include <eti/io.hpp>
#include <eti/runner.hpp>
