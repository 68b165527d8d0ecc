#include "npanel/npanel.hpp"
#include "npanel/json_io.hpp"
#include "npanel/csv.hpp"
int main(){return 0;}
