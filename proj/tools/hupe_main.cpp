#include <iostream>

#include "hupe/cli.hpp"

int main(int argc, char** argv)
{
    return hupe::run_cli(argc, argv, std::cout, std::cerr);
}
