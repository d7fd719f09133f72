#include "wmlab/harness.hpp"

int main(int argc, char** argv) { return wmlab::cli_dispatch(argc, argv); }
