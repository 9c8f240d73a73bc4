#include <cstdio>
#include "spnet/version.hpp"
int main() { std::printf("spnet %s\n", spnet::kVersion); return 0; }
