#include "cli_app.hpp"

int main(int argc, char** argv) { return nearfield::cli::run(argc, argv); }
