#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "imdm/training.hpp"

namespace imdm::cli {

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_bytes(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// Git object id of a blob: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_hash(const std::string& content);

// One line per recorded window: iteration,loss.
std::string loss_csv(const std::vector<LossPoint>& trace);

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Standalone SVG line chart with linear axes (or log2 x when log_x).
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, bool log_x = false);

}  // namespace imdm::cli
