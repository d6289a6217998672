// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/cli.hpp"

int main(int argc, char** argv) { return adaptmerge::cli::main(argc, argv); }
