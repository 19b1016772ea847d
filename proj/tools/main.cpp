#include <obstacle_cli/app.hpp>

int main(int argc, char** argv)
{
  return obstacle_cli::run(argc, argv);
}
