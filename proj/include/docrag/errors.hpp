#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace docrag {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// --- gateway ---

class RetryExhausted : public Error {
public:
    using Error::Error;
};

class FixtureMiss : public Error {
public:
    explicit FixtureMiss(std::string fingerprint)
        : Error("no cassette record for fingerprint " + fingerprint), fingerprint_(std::move(fingerprint)) {}
    const std::string& fingerprint() const noexcept { return fingerprint_; }

private:
    std::string fingerprint_;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class PriceUnknown : public Error {
public:
    explicit PriceUnknown(std::string model)
        : Error("no price entry for model '" + model + "'"), model_(std::move(model)) {}
    const std::string& model() const noexcept { return model_; }

private:
    std::string model_;
};

// --- ingest ---

class SchemaError : public Error {
public:
    SchemaError(std::size_t block_index, const std::string& what)
        : Error("block " + std::to_string(block_index) + ": " + what), block_index_(block_index) {}
    std::size_t block_index() const noexcept { return block_index_; }

private:
    std::size_t block_index_;
};

class AssetMissing : public Error {
public:
    explicit AssetMissing(std::string path)
        : Error("asset not found: " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

// --- knowledge base / index / linker ---

class ExtractionEmpty : public Error {
public:
    using Error::Error;
};

class DescriptionUnavailable : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    DimensionError(std::string record_id, std::size_t expected, std::size_t actual)
        : Error("record '" + record_id + "' has dimension " + std::to_string(actual) + ", expected " +
                std::to_string(expected)),
          record_id_(std::move(record_id)) {}
    const std::string& record_id() const noexcept { return record_id_; }

private:
    std::string record_id_;
};

class BlockNotFound : public Error {
public:
    explicit BlockNotFound(const std::string& block_id) : Error("unknown block: " + block_id) {}
};

// Raised by the end-to-end answer path; names the stage that failed.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace docrag
