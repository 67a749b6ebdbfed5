#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <vector>

namespace subdistill {

// Dense row-major float64 matrix. Serializes to the `SDMX` binary format:
// magic "SDMX", u32 rows, u32 cols (little-endian), then rows*cols float64
// values row-major, little-endian.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix from_row(std::span<const double> row);
  static Matrix from_column(std::span<const double> column);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  Matrix transposed() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  bool all_finite() const;
  double frobenius_norm() const;
  double max_abs() const;

  // Column means as a length-cols vector.
  std::vector<double> column_means() const;
  // Rows minus the mean row.
  Matrix centered_rows() const;
  void add_row_vector(std::span<const double> v);
  void subtract_row_vector(std::span<const double> v);

  Matrix selected_rows(std::span<const std::size_t> indices) const;
  Matrix selected_cols(std::span<const std::size_t> indices) const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

// a^T * b without forming the transpose.
Matrix at_b(const Matrix& a, const Matrix& b);
// a * b^T without forming the transpose.
Matrix a_bt(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// ||a - b||_max, DimensionError on shape mismatch.
double max_abs_diff(const Matrix& a, const Matrix& b);

void write_sdmx(const Matrix& m, std::ostream& out);
void write_sdmx(const Matrix& m, const std::filesystem::path& path);
Matrix read_sdmx(std::istream& in);
Matrix read_sdmx(const std::filesystem::path& path);

}  // namespace subdistill
