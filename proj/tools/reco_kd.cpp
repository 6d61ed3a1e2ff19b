// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "recokd/cli.hpp"

int main(int argc, char** argv) { return recokd::cli::run(argc, argv, std::cout, std::cerr); }
