#pragma once

#include <stdexcept>
#include <string>

namespace strforge {

/// Base for every error raised by the library. `category()` lets front ends
/// map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  enum class Category { Usage, Data, Numeric };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(Category::Numeric, "shape error: " + what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(Category::Numeric, "state error: " + what) {}
};

class DegeneracyError : public Error {
 public:
  explicit DegeneracyError(const std::string& what)
      : Error(Category::Numeric, "degeneracy error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::Usage, "config error: " + what) {}
};

class CodecError : public Error {
 public:
  explicit CodecError(const std::string& what) : Error(Category::Data, "codec error: " + what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Category::Data, "data error: " + what) {}
};

}  // namespace strforge
