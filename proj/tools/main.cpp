#include "cli.hpp"

int main(int argc, char** argv) { return dsgq::cli::cli_main(argc, argv); }
