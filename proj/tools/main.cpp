#include "cli.hpp"

int main(int argc, char** argv) {
  return ptsp::cli::dispatch({argv + 1, argv + argc});
}
