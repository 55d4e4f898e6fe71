// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "aggload/cli.hpp"

int main(int argc, char** argv) { return aggload::cli::run(argc, argv, std::cout, std::cerr); }
