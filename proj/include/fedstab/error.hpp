#pragma once

#include <stdexcept>
#include <string>

namespace fedstab {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Iterates blew up or went non-finite during training.
struct DivergedError : Error {
    DivergedError(const std::string& msg, int round_, int client_) : Error(msg), round(round_), client(client_) {}
    int round;
    int client;
};

// Inner proximal solve ran out of iterations before hitting tolerance.
struct ProxError : Error {
    ProxError(const std::string& msg, double residual_) : Error(msg), residual(residual_) {}
    double residual;
};

}  // namespace fedstab
