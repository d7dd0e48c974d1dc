#include "iql/heatmap.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace iql {

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

void emit_heatmap(const ValueTable& values, const TabularMdp& mdp,
                  const std::filesystem::path& path) {
    if (mdp.grid.empty())
        throw std::invalid_argument("emit_heatmap: MDP carries no grid layout");
    if (values.v.size() != static_cast<std::size_t>(mdp.n_states))
        throw std::invalid_argument("emit_heatmap: value table size mismatch");

    std::ofstream out(path);
    if (!out) throw std::runtime_error("emit_heatmap: cannot open " + path.string());
    out << "state,row,col,value\n";
    for (int s = 0; s < mdp.n_states; ++s) {
        out << s << "," << mdp.grid.row[static_cast<std::size_t>(s)] << ","
            << mdp.grid.col[static_cast<std::size_t>(s)] << ","
            << format_double(values.v[static_cast<std::size_t>(s)]) << "\n";
    }
}

void emit_q_heatmap(const QTable& q, const TabularMdp& mdp,
                    const std::filesystem::path& path) {
    if (mdp.grid.empty())
        throw std::invalid_argument("emit_q_heatmap: MDP carries no grid layout");
    if (q.n_states != mdp.n_states || q.n_actions != mdp.n_actions)
        throw std::invalid_argument("emit_q_heatmap: Q table shape mismatch");

    std::ofstream out(path);
    if (!out) throw std::runtime_error("emit_q_heatmap: cannot open " + path.string());
    out << "state,row,col,action,value\n";
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            out << s << "," << mdp.grid.row[static_cast<std::size_t>(s)] << ","
                << mdp.grid.col[static_cast<std::size_t>(s)] << "," << a << ","
                << format_double(q.at(s, a)) << "\n";
}

ValueTable read_heatmap(const std::filesystem::path& path, int n_states) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_heatmap: cannot open " + path.string());
    ValueTable values;
    values.v.assign(static_cast<std::size_t>(n_states), 0.0);
    std::string line;
    if (!std::getline(in, line) || line != "state,row,col,value")
        throw std::runtime_error("read_heatmap: missing or unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string cell;
        std::getline(fields, cell, ',');
        const int s = std::stoi(cell);
        std::getline(fields, cell, ',');  // row
        std::getline(fields, cell, ',');  // col
        std::getline(fields, cell, ',');
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc())
            throw std::runtime_error("read_heatmap: bad value field '" + cell + "'");
        if (s < 0 || s >= n_states) throw std::runtime_error("read_heatmap: state out of range");
        values.v[static_cast<std::size_t>(s)] = v;
    }
    return values;
}

}  // namespace iql
