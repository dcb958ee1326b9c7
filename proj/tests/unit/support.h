#pragma once

#include "stuttergate/error.h"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unistd.h>

namespace test_support {

/// Runs fn and returns the kind of the stuttergate::Error it threw.
inline std::optional<stuttergate::ErrorKind> error_kind(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const stuttergate::Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

inline std::string error_text(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("sg_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace test_support
