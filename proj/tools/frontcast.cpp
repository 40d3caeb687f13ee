#include <iostream>

int main() {
    std::cout << "frontcast cli placeholder\n";
    return 0;
}
