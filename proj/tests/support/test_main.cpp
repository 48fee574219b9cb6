#define DOCTEST_CONFIG_IMPLEMENT
#include <test_doctest.hpp>

#include <torch/torch.h>

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    doctest::Context context;
    context.applyCommandLine(argc, argv);
    return context.run();
}
