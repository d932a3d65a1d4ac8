# TrajVision - 测试包
