#pragma once

#include <stdexcept>
#include <string>

namespace cfr {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};

struct ValueError : Error {
    using Error::Error;
};

// Malformed external input (WAV header, feature file, checkpoint, manifest).
struct FormatError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Target cannot be aligned to the frame sequence (loss would be infinite).
struct CtcInfeasibleError : Error {
    using Error::Error;
};

struct VocabError : Error {
    using Error::Error;
};

}  // namespace cfr
