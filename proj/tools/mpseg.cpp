// Placeholder: the CLI grows subcommands as the library lands.
#include <cstdio>

int main() {
    std::puts("mpseg: not yet wired");
    return 2;
}
