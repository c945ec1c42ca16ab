# 训练、评估、消融与诊断
