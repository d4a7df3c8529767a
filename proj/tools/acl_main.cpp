#include "acl/cli.hpp"

int main(int argc, char** argv) { return acl::cli_main(argc, argv); }
