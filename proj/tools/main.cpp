#include "cli.hpp"

int main(int argc, char** argv) { return immcognito::cli::dispatch(argc, argv); }
