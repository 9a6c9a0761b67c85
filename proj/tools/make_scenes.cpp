// Writes toy scenes with box and mask labels for desk-scale runs.
#include <iostream>

#include <CLI11.hpp>

#include "hupe/data.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"toy scene generator"};
    std::filesystem::path out_dir, labels_dir;
    hupe::SceneOptions options;
    app.add_option("--out", out_dir)->required();
    app.add_option("--labels", labels_dir)->required();
    app.add_option("--count", options.count);
    app.add_option("--size", options.size);
    app.add_option("--classes", options.num_classes);
    app.add_option("--seed", options.seed);
    CLI11_PARSE(app, argc, argv);
    try {
        hupe::generate_toy_scenes(out_dir, labels_dir, options);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::cout << "wrote " << options.count << " scenes to " << out_dir.string() << '\n';
    return 0;
}
