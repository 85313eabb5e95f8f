#include <iostream>

#include "grpfed/app.hpp"

int main(int argc, char** argv) { return grpfed::app::run_cli(argc, argv, std::cout, std::cerr); }
