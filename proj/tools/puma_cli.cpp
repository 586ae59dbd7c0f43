#include <cstdio>

int main() {
    std::puts("puma_cli: subcommands pending");
    return 0;
}
