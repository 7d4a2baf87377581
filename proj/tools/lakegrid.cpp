#include <iostream>

#include "lakegrid/client/client.hpp"

int main(int argc, char** argv) { return lakegrid::client::run_cli(argc, argv, std::cout, std::cerr); }
